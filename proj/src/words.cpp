#include "ctxlog/words.hpp"

#include <sstream>

#include "ctxlog/rng.hpp"

namespace ctxlog {

namespace {

// assets/common_words_en.txt, one word per line.
constexpr std::string_view kCommonWordsText =
    "the\nto\nand\nof\na\nin\ni\nis\nfor\nthat\nyou\nit\non\nwith\nthis\nwas\nbe\nas\nare\nhave\n"
    "at\nhe\nnot\nby\nbut\nfrom\nmy\nor\nwe\nan\nyour\nall\nso\nhis\nthey\nme\nif\none\ncan\nwill\n"
    "just\nlike\nabout\nup\nout\nwhat\nhas\nwhen\nmore\ndo\nno\nwere\nwho\nhad\ntheir\nthere\nher\n"
    "which\ntime\nget\nbeen\nwould\nshe\nnew\npeople\nhow\nsome\nalso\nthem\nnow\nother\nits\nour\n"
    "than\ngood\nonly\nafter\nfirst\nhim\ninto\nknow\nsee\ntwo\nmake\nover\nthink\nany\nthen\n"
    "could\nback\nthese\nus\nwant\nbecause\ngo\nwell\nsaid\nway\nmost\nmuch\nvery\nwhere\neven\n"
    "should\nmay\nhere\nneed\nreally\ndid\nright\nwork\nyear\nyears\nbeing\nday\ntoo\ngoing\n"
    "before\noff\nwhy\nmade\nstill\ntake\ngot\nmany\nnever\nthose\nlife\nsay\nworld\ndown\ngreat\n"
    "through\nlast\ns\nwhile\nbest\nsuch\nlove\nman\nhome\nlong\nlook\nsomething\nuse\nsame\nused\n"
    "both\nevery\nam\ncome\npart\nstate\nthree\naround\nbetween\nalways\nbetter\nfind\nhelp\nhigh\n"
    "little\nold\nsince\nanother\ndoes\nown\nthings\nunder\nduring\ngame\nthing\ngive\nhouse\n"
    "place\nschool\nagain\nnext\neach\nmr\nwithout\nagainst\nend\nfound\nmust\nshow\nbig\nfeel\n"
    "sure\nteam\never\nfamily\nkeep\nmight\nplease\nput\nmoney\nfree\nsecond\nsomeone\naway\nleft\n"
    "number\ncity\ndays\nlot\nname\nnight\nplay\nuntil\ncompany\ndoing\nfew\nlet\nreal\ncalled\n"
    "different\nhaving\nset\nthought\ndone\nhowever\ngetting\ngod\ngovernment\ngroup\nlooking\n"
    "public\ntop\nwomen\nbusiness\ncare\nstart\nsystem\ntimes\nweek\nalready\nanything\ncase\n"
    "nothing\nperson\ntoday\nchange\nenough\neverything\nfull\nlive\nmaking\npoint\nread\ntold\n"
    "yet\nbad\nfour\nhard\nmean\nonce\nsupport\ntell\nincluding\nmusic\npower\nseen\nstates\nstop\n"
    "water\nbased\nbelieve\ncall\nhead\nmen\nnational\nsmall\ntook\nwhite\ncame\nfar\njob\nside\n"
    "though\ntry\nwent\nyes\nactually\namerican\nlater\nless\nline\norder\nparty\nrun\nsays\n"
    "service\ncountry\nopen\nseason\nshit\nthank\nchildren\neveryone\ngeneral\ntrying\nunited\n"
    "using\narea\nblack\nd\nfollowing\nlaw\nmakes\ntogether\nwar\nwhole\ncar\nface\nfive\nkind\n"
    "maybe\nper\npresident\nstory\nworking\ncourse\ngames\nhealth\nhope\nimportant\nleast\nmeans\n"
    "news\nwithin\nable\nbook\nearly\nfriends\ninformation\nlocal\noh\npost\nt\nthanks\nvideo\n"
    "young\nago\nothers\nsocial\ntalk\ncourt\nfact\ngiven\nguys\nhalf\nhand\nlevel\nmind\noften\n"
    "single\nbecome\nbody\ncoming\ncontrol\ndeath\nfood\nguy\nhours\noffice\npay\nproblem\nsouth\n"
    "true\nalmost\nfuck\nhistory\nknown\nlarge\nlost\nm\nresearch\nroom\nseveral\nstarted\ntaking\n"
    "university\nwin\nwrong\nalong\nanyone\nelse\ngirl\njohn\nmatter\npretty\nremember\nair\nbit\n"
    "friend\nhit\nneeds\nnice\nplaying\nprobably\nsaying\nunderstand\nyeah\nyork\nclass\nclose\n"
    "comes\nidea\ninternational\nlooks\npast\npossible\nwanted\nb\ncause\ndue\nhappy\nhuman\n"
    "members\nmonths\nmove\nquestion\nr\nseries\nwait\nwoman\nask\ncommunity\ndata\nlate\nleave\n"
    "north\nsaw\nspecial\nwatch\nc\neither\nfucking\nfuture\nlight\nlow\nmillion\nmorning\npolice\n"
    "short\nstay\ntaken\nage\nbuy\ndeal\nrather\nreason\nred\nreport\nsoon\nthird\nturn\nwhether\n"
    "among\ncheck\ndevelopment\nform\nfurther\nheart\nminutes\nmyself\nservices\nyourself\nact\n"
    "although\nasked\nchild\nfire\nfun\nliving\nmajor\nmedia\nphone\nplayers\nart\nbehind\n"
    "building\neasy\ngonna\nmarket\nnear\nnon\nplan\npolitical\nquite\nsix\ntalking\nwest\nworks\n"
    "according\navailable\ne\neducation\nfinal\nformer\nfront\nkids\nlist\nready\nsometimes\nson\n"
    "street\nbring\ncollege\ncurrent\nexample\nexperience\nheard\nlondon\nmeet\nprogram\ntype\n"
    "baby\nchance\nfather\nmarch\nprocess\nsong\nstudy\nword\nacross\naction\nclear\ngave\ngets\n"
    "himself\nmonth\noutside\nself\nstudents\nwords\nboard\ncost\ncut\ndr\nfield\nheld\ninstead\n"
    "main\nmoment\nmother\nroad\nseems\nthinking\ntown\nwants\nde\ndepartment\nenergy\nfight\n"
    "fine\nforce\nhear\nissue\nplayed\npoints\nprice\nre\nrest\nresults\nrunning\nshows\nspace\n"
    "summer\nterm\nwife\namerica\nbeautiful\ndate\ngoes\nkilled\nland\nmiss\nproject\nsex\nshot\n"
    "site\nstrong\naccount\nco\nespecially\neyes\ninclude\njune\nparents\nperiod\nposition\n"
    "record\nsimilar\ntotal\nw\nabove\nclub\ncommon\ndied\nfilm\nhappened\nknew\nlead\nlikely\n"
    "military\nperfect\npersonal\nsecurity\nshare\nst\ntv\nwon\nx\napril\ncenter\ncounty\ncouple\n"
    "dead\nenglish\nhappen\nhold\nindustry\ninside\nissues\nonline\nplayer\nprivate\nproblems\n"
    "return\nrights\nsense\nstar\ntest\nview\nweeks\nbreak\nbritish\ncompanies\nevent\nhigher\n"
    "hour\nl\nmember\nmiddle\nneeded\npresent\nresult\nsorry\ntakes\ntraining\nwish\nanswer\nboy\n"
    "design\nfinally\ngirls\ngold\ngone\nguess\ninterest\njuly\nking\nlearn\npolicy\nsociety\n"
    "added\nal\nalone\naverage\nbank\nbrought\ncertain\nchurch\neast\nhands\nhot\nlonger\nmedical\n"
    "movie\noriginal\npark\nperformance\npress\nreceived\nrole\nsent\nthemselves\ntried\nworked\n"
    "worth\nareas\nbecame\nbill\nbooks\ncool\ndirector\nexactly\ngiving\nground\nmeeting\nn\n"
    "provide\nquestions\nrelationship\nseptember\nsound\nsource\nusually\nvalue\nevidence\nfollow\n"
    "lives\nofficial\nok\nproduction\nrate\nreading\nround\nsave\nstand\nstuff\ntax\nwhatever\n"
    "amount\nblue\ncountries\ndavid\ndrive\neat\nfall\nfast\nfederal\nfeeling\nfelt\ngreen\n"
    "league\nmanagement\nmatch\nmodel\np\npicture\nsize\nstep\ntrust\ncentral\nchanges\nengland\n"
    "forward\ngroups\nhey\nkey\nmom\no\npage\npaid\nrange\nreview\nscience\ntrade\nuk\nupon\n"
    "various\nattention\nbrother\ncannot\ncharacter\nchief\ncup\nfootball\nhate\njames\nled\n"
    "looked\nlower\nnatural\noctober\nproperty\nquality\nsend\nstyle\nu\nvote\namazing\naugust\n"
    "blood\nchina\ncomplete\ndog\neconomic\nhell\ninvolved\nitself\nlanguage\nlord\nnovember\noil\n"
    "related\nserious\nstage\nterms\ntitle\nadd\narticle\nattack\nborn\ndamn\ndecided\ndecision\n"
    "enjoy\nentire\nfrench\njanuary\nkill\nmet\nperhaps\npoor\nrelease\nsituation\ntechnology\n"
    "turned\nwebsite\nwritten\nchoice\ncode\nconsidered\ncontinue\ncouncil\ncover\ncurrently\n"
    "door\nelection\neuropean\nevents\nf\nfinancial\nforeign\nhair\nincrease\nlegal\nlose\n"
    "michael\npick\nrace\nseem\nseven\nsign\nsimple\nsimply\nstaff\nsuper\nunion\nwalk\n"
    "washington\nbed\nbegan\nbuilt\ncareer\nchanged\ncrazy\ndaily\ndaughter\ndecember\ndie\n"
    "difficult\nfigure\nhospital\nknows\nloss\nmodern\nones\npaper\nparts\npopular\npublished\n"
    "safe\nstarting\nsystems\nversion\nvoice\nwhose\nwriting\narmy\naustralia\nearth\nforget\n"
    "goal\nh\nhuge\ninternet\nlisten\nokay\npractice\nrules\nsea\nsir\nsuccess\ntowards\nv\n"
    "waiting\nways\naccess\nbase\nbelow\ncreated\ndeep\nfollowed\nla\nlol\nmark\nmissing\noffer\n"
    "pass\nprofessional\nreleased\nrisk\nschools\nsleep\ntable\nten\ntruth\nball\nbox\nbuild\n"
    "card\ncases\ndark\ndistrict\neurope\ngeorge\nindia\nmine\nminister\nnote\npercent\npiece\n"
    "products\nrecent\nseeing\nstraight\nvisit\nwall\nwanna\nwrote\nallowed\nboys\nculture\netc\n"
    "fans\nfebruary\ngives\ngrowth\nincluded\nmarried\nofficer\npain\npaul\nplaces\nrespect\n"
    "response\nriver\nrock\nshall\nspeak\nspecific\nstandard\ntonight\nwrite\ny\nalbum\ncentury\n"
    "charge\ncold\ncreate\neffect\neight\nexcept\neye\nfunny\nii\nlimited\nmoving\nnetwork\npeace\n"
    "provided\nrecently\nrequired\nsales\nspent\nstore\nstudent\ntomorrow\ntrack\nvia\nwatching\n"
    "weight\naddition\nahead\nallow\n";

} // namespace

std::string_view common_words_text() { return kCommonWordsText; }

const std::vector<std::string>& common_words() {
    static const std::vector<std::string> words = [] {
        std::vector<std::string> out;
        std::istringstream in{std::string(kCommonWordsText)};
        for (std::string w; std::getline(in, w);) out.push_back(w);
        return out;
    }();
    return words;
}

std::uint64_t common_words_checksum() { return fnv1a64(kCommonWordsText); }

} // namespace ctxlog
